#include "windfc/cli.hpp"

int main(int argc, char** argv) { return windfc::cli::main(argc, argv); }
