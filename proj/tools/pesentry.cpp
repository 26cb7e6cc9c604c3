// pesentry - static PE malware/ransomware detection toolkit

#include "pesentry/cli.hpp"

#include <iostream>

int main(int argc, char** argv) {
    return pesentry::run_cli(argc, argv, std::cout, std::cerr);
}
