#include <vector>

#include "isfl/cli.hpp"

int main(int argc, char** argv) {
    return isfl::run_cli(std::vector<std::string>(argv + 1, argv + argc));
}
