#include "cpret/cli.hpp"

int main(int argc, char** argv) { return cpret::cli::run(argc, argv); }
