#include "sganc/cli.hpp"

int main(int argc, char** argv) { return sganc::cli::run(argc, argv); }
