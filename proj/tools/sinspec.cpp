#include <string>
#include <vector>

#include "sinspec/cli.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return sinspec::cli::run(args);
}
