#include "odpscreen/cli.hpp"

int main(int argc, char** argv) { return odpscreen::cli::run(argc, argv); }
