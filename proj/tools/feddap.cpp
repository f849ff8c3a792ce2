#include "feddap/cli.hpp"

int main(int argc, char** argv) { return feddap::run_cli(argc, argv); }
