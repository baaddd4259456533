extern "C" __global__ void xpose( float const * in,  float * out) {
  int gid = (blockIdx.x*blockDim.x+threadIdx.x);
  if (gid < 1*9*9*8) {
    int c_img = (gid / (9*9*8));
    int c_y = (gid / (9*8)) % 9;
    int c_x = (gid / (8)) % 9;
    int c_chan = gid % 8;
    out[c_img*648 + c_y*72 + c_x*8 + c_chan*1] = (c_chan < 4) ? in[c_img*324 + c_chan*81 + c_y*9 + c_x*1] : 0.0f;
  }
}
