#include "evo2048/cli.hpp"

int main(int argc, char** argv) { return evo2048::cli::run(argc, argv); }
