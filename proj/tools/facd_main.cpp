#include "facd/cli.hpp"

int main(int argc, char** argv) { return facd::run_cli(argc, argv); }
