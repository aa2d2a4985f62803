#include "mtf/cli.hpp"

int main(int argc, char** argv) { return mtf::dispatch(argc, argv); }
