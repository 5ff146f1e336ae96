#include "infoqm/cli.hpp"

int main(int argc, char** argv) { return infoqm::cli::run(argc, argv); }
