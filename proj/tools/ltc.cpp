#include "ltc/cli.hpp"

int main(int argc, char** argv) { return ltc::cli::run(argc, argv); }
