#include "tcs/cli.hpp"

int main(int argc, char** argv) { return tcs::cli::dispatch(argc, argv); }
