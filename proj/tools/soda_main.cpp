#include "soda/cli.hpp"

int main(int argc, char** argv) { return soda::cli_main(argc, argv); }
