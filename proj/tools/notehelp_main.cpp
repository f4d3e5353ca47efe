#include "notehelp/cli.hpp"

int main(int argc, char** argv) { return notehelp::cli::main(argc, argv); }
