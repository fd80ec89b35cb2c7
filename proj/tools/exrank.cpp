#include <exrank/cli.hpp>

int main(int argc, char** argv) { return exrank::run_cli(argc, argv); }
