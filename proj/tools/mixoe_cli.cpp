#include "mixoe/cli.hpp"

int main(int argc, char** argv) { return mixoe::cli_main(argc, argv); }
