#include "h2m/cli.hpp"

int main(int argc, char** argv) { return h2m::cli::run(argc, argv); }
