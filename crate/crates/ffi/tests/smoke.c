#include <stdio.h>
#include <stdlib.h>
#include "gridid.h"

int main(void) {
    GridNetwork *net = NULL;
    if (gridid_network_ieee33(&net) != GRID_STATUS_OK) return 1;
    size_t n = 0;
    if (gridid_network_bus_count(net, &n) != GRID_STATUS_OK || n != 33) return 2;
    double *g = malloc(n * n * sizeof(double));
    double *b = malloc(n * n * sizeof(double));
    if (gridid_network_admittance(net, g, b, n * n) != GRID_STATUS_OK) return 3;
    if (gridid_network_admittance(net, g, b, 4) != GRID_STATUS_BUFFER_TOO_SMALL) return 4;
    char msg[256];
    if (gridid_last_error(msg, sizeof msg) == 0) return 5;
    printf("version %s, n = %zu, Y[0][1] = %.6f%+.6fj\n", gridid_version(), n, g[1], b[1]);
    free(g);
    free(b);
    gridid_network_free(net);
    return 0;
}
