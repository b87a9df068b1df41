#include "headbench/cli.hpp"

int main(int argc, char** argv) { return headbench::run_cli(argc, argv); }
