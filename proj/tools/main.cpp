#include "rra/cli.hpp"

int main(int argc, char** argv) { return rra::run(argc, argv); }
