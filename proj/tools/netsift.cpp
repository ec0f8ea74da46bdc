#include "netsift/cli.hpp"

int main(int argc, char** argv) { return netsift::cli_main(argc, argv); }
