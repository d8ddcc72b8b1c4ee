#include "cadtext/cli.hpp"

int main(int argc, char** argv) { return cadtext::cli::main(argc, argv); }
