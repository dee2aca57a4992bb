#include "llmar/cli.hpp"

int main(int argc, char** argv) { return llmar::run_cli(argc, argv); }
