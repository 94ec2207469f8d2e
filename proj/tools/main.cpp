#include "cli.hpp"

int main(int argc, char** argv) { return rest::cli::run(argc, argv); }
