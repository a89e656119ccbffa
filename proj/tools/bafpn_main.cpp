#include "bafpn/cli.hpp"

int main(int argc, char** argv) { return bafpn::cli_main(argc, argv); }
