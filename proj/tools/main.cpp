#include "backsplat/cli.hpp"

int main(int argc, char** argv) { return backsplat::cli_main(argc, argv); }
