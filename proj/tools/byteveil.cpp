#include "byteveil/cli.hpp"

int main(int argc, char** argv)
{
    return byteveil::run_cli(argc, argv);
}
