#include "unirep/cli.hpp"

int main(int argc, char** argv) { return unirep::dispatch(argc, argv); }
