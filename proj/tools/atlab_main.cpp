#include "atlab/harness.hpp"

int main(int argc, char** argv) { return atlab::cli_main(argc, argv); }
