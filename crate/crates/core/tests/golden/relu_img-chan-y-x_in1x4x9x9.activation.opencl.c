__kernel void act_relu(__global float const * in, __global float * out) {
  int gid = get_global_id(0);
  if (gid < 1*4*9*9) {
    int c_img = (gid / (4*9*9));
    int c_chan = (gid / (9*9)) % 4;
    int c_y = (gid / (9)) % 9;
    int c_x = gid % 9;
    float v = in[c_img*324 + c_chan*81 + c_y*9 + c_x*1];
    out[c_img*324 + c_chan*81 + c_y*9 + c_x*1] = ((v > 0.0f) ? v : 0.0f);
  }
}
