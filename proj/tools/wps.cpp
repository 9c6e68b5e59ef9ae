#include "wps/cli.hpp"

int main(int argc, char** argv) { return wps::run_command(argc, argv); }
