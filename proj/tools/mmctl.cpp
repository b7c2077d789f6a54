// placeholder until the command layer lands
int main() { return 0; }
