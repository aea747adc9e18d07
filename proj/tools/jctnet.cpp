#include "jct/cli.hpp"

int main(int argc, char** argv) { return jct::cli_main(argc, argv); }
