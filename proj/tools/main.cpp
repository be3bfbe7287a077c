#include "cli.hpp"

int main(int argc, char** argv) { return cadapter::cli::run(argc, argv); }
