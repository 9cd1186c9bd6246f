#include "tsim/app.hpp"

int main(int argc, char** argv) { return tsim::run_cli(argc, argv); }
