#include "gjscc/cli.hpp"

int main(int argc, char** argv) { return gjscc::run_cli(argc, argv); }
