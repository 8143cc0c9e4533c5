#include "cli.hpp"

int main(int argc, char** argv) { return biodyn::cli::cli_main(argc, argv); }
