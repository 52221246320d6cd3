#include "hjr/cli.hpp"

int main(int argc, char** argv) { return hjr::cli::run(argc, argv); }
