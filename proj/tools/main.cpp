#include "anomagent/cli.hpp"

int main(int argc, char** argv) { return anomagent::cli::run(argc, argv); }
