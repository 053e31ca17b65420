#include <timmdp/cli.hpp>

#include <iostream>

int main(int argc, char** argv) { return timmdp::cli::run(argc, argv, std::cout, std::cerr); }
