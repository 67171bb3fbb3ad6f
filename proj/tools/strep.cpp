#include <iostream>

#include "strep/cli.hpp"

int main(int argc, char** argv) { return strep::run_cli({argv, argv + argc}, std::cout, std::cerr); }
