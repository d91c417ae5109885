#include "recbase/cli.hpp"

int main(int argc, char** argv) { return recbase::cli::main(argc, argv); }
