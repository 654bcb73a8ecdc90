#include "pc/cli.h"

int main(int argc, char** argv) { return pc::cli::run(argc, argv); }
