#include "rsslab/cli.hpp"

int main(int argc, char** argv) { return rsslab::cli::dispatch(argc, argv); }
