#include "pvqe/cli.hpp"

int main(int argc, char** argv) { return pvqe::run_cli(argc, argv); }
