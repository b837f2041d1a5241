#include "roct/cli.hpp"

int main(int argc, char** argv) { return roct::run(argc, argv); }
