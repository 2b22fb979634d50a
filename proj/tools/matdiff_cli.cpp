#include <cstdio>

int main(int argc, char** argv) {
    (void)argc;
    (void)argv;
    std::printf("matdiff: command-line entry points land here\n");
    return 0;
}
