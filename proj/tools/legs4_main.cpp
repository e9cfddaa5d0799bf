#include "cli.hpp"

int main(int argc, char** argv) { return legs4::cli_main(argc, argv); }
