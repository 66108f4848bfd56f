#include "pv/cli.hpp"

int main(int argc, char** argv) { return pv::cli::run(argc, argv); }
