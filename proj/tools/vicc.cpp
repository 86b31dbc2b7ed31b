#include "vicc/cli.hpp"

int main(int argc, char** argv) { return vicc::run_cli(argc, argv); }
