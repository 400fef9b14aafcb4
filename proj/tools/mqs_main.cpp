#include "mqs/cli.hpp"

int main(int argc, char** argv) { return mqs::run(argc, argv); }
