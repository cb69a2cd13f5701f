#include "sprobe/cli.hpp"

int main(int argc, char** argv) { return sprobe::cli_dispatch(argc, argv); }
