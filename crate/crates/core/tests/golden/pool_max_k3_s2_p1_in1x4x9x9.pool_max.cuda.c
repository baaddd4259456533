extern "C" __global__ void pool_max( float const * in,  float * out) {
  int gid = (blockIdx.x*blockDim.x+threadIdx.x);
  if (gid < 1*4*5*5) {
    int ox = gid % 5;
    int oy = (gid / 5) % 5;
    int c = (gid / (5*5)) % 4;
    int img = gid / (5*5*4);
    float acc = -INFINITY;
    for (int ky = 0; ky < 3; ++ky) {
      int iy = oy*2 - 1 + ky;
      for (int kx = 0; kx < 3; ++kx) {
        int ix = ox*2 - 1 + kx;
        if (iy >= 0 && iy < 9 && ix >= 0 && ix < 9) { acc = fmax(acc, in[img*324 + c*81 + iy*9 + ix*1]); }
      }
    }
    out[img*100 + c*25 + oy*5 + ox*1] = acc;
  }
}
