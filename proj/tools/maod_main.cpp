#include "maod/cli.hpp"

int main(int argc, char** argv) { return maod::run_cli(argc, argv); }
