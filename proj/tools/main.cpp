#include "tracktention/cli.hpp"

int main(int argc, char** argv) { return tracktention::cli_main(argc, argv); }
