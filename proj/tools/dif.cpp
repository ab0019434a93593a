#include "dif/cli/cli.hpp"

int main(int argc, char** argv) { return dif::cli::run(argc, argv); }
