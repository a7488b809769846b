#include "orfactor/cli.hpp"

int main(int argc, char** argv) { return orfactor::cli_main(argc, argv); }
