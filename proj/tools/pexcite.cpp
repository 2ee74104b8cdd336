#include "pexcite/cli.hpp"

int main(int argc, char** argv) { return pexcite::cli::run(argc, argv); }
