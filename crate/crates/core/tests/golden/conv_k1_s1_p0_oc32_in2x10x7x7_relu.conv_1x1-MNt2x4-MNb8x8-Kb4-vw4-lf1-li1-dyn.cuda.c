typedef struct {
  int in_img_size;
  int in_img_stride;
  int in_chan_size;
  int in_chan_stride;
  int in_y_size;
  int in_y_stride;
  int in_x_size;
  int in_x_stride;
  int filts_in_chan_size;
  int filts_in_chan_stride;
  int filts_y_size;
  int filts_y_stride;
  int filts_x_size;
  int filts_x_stride;
  int filts_out_chan_size;
  int filts_out_chan_stride;
  int biases_out_chan_size;
  int biases_out_chan_stride;
  int out_img_size;
  int out_img_stride;
  int out_chan_size;
  int out_chan_stride;
  int out_y_size;
  int out_y_stride;
  int out_x_size;
  int out_x_stride;
} conv_1x1_meta_t;
extern "C" __global__ void conv_1x1( float const * in,  float const * filts,  float const * biases,  float * out,  conv_1x1_meta_t const * meta) {
  __shared__ float filts_buf[128];
  __shared__ float in_buf[64];
  int thread_id = threadIdx.x;
  int gm = blockIdx.x / 1;
  int gn = blockIdx.x % 1;
  int tm = thread_id / 8;
  int tn = thread_id % 8;
  int m0 = gm*16 + tm*2;
  int n0 = gn*32 + tn*4;
  int io = tm*2;
  int fo = tn*4;
  int mc_0 = (m0 + 0 < meta->out_img_size*meta->out_y_size*meta->out_x_size) ? m0 + 0 : meta->out_img_size*meta->out_y_size*meta->out_x_size - 1;
  int img_0 = mc_0 / (meta->out_y_size*meta->out_x_size);
  int py_0 = (mc_0 / meta->out_x_size) % meta->out_y_size;
  int px_0 = mc_0 % meta->out_x_size;
  int ib_0 = img_0*meta->in_img_stride + py_0*1*meta->in_y_stride + px_0*1*meta->in_x_stride;
  int ob_0 = img_0*meta->out_img_stride + py_0*meta->out_y_stride + px_0*meta->out_x_stride;
  int mc_1 = (m0 + 1 < meta->out_img_size*meta->out_y_size*meta->out_x_size) ? m0 + 1 : meta->out_img_size*meta->out_y_size*meta->out_x_size - 1;
  int img_1 = mc_1 / (meta->out_y_size*meta->out_x_size);
  int py_1 = (mc_1 / meta->out_x_size) % meta->out_y_size;
  int px_1 = mc_1 % meta->out_x_size;
  int ib_1 = img_1*meta->in_img_stride + py_1*1*meta->in_y_stride + px_1*1*meta->in_x_stride;
  int ob_1 = img_1*meta->out_img_stride + py_1*meta->out_y_stride + px_1*meta->out_x_stride;
  float acc_0_0 = 0.0f;
  float acc_0_1 = 0.0f;
  float acc_0_2 = 0.0f;
  float acc_0_3 = 0.0f;
  float acc_1_0 = 0.0f;
  float acc_1_1 = 0.0f;
  float acc_1_2 = 0.0f;
  float acc_1_3 = 0.0f;
  for (int kc = 0; kc < (meta->filts_in_chan_size*meta->filts_y_size*meta->filts_x_size) / 4; ++kc) {
    int kbase = kc*4;
    __syncthreads();
    int fsrc = kbase*meta->filts_x_stride + gn*32;
    filts_buf[0+thread_id] = filts[fsrc+thread_id];
    filts_buf[64+thread_id] = filts[fsrc+64+thread_id];
    { int mc_l = (gm*16 + (thread_id)%16 < meta->out_img_size*meta->out_y_size*meta->out_x_size) ? gm*16 + (thread_id)%16 : meta->out_img_size*meta->out_y_size*meta->out_x_size - 1; int img_l = mc_l / (meta->out_y_size*meta->out_x_size); int py_l = (mc_l / meta->out_x_size) % meta->out_y_size; int px_l = mc_l % meta->out_x_size; int ib_l = img_l*meta->in_img_stride + py_l*1*meta->in_y_stride + px_l*1*meta->in_x_stride; int lko = (kbase + (thread_id)/16)*meta->in_chan_stride; in_buf[0+thread_id] = in[ib_l + lko]; }
    __syncthreads();
    {
      int k = kbase + 0;
      float a_0 = in_buf[0 + io + 0];
      float a_1 = in_buf[0 + io + 1];
      float b_0 = filts_buf[0 + fo + 0];
      float b_1 = filts_buf[0 + fo + 1];
      float b_2 = filts_buf[0 + fo + 2];
      float b_3 = filts_buf[0 + fo + 3];
      acc_0_0 = fma(a_0, b_0, acc_0_0);
      acc_0_1 = fma(a_0, b_1, acc_0_1);
      acc_0_2 = fma(a_0, b_2, acc_0_2);
      acc_0_3 = fma(a_0, b_3, acc_0_3);
      acc_1_0 = fma(a_1, b_0, acc_1_0);
      acc_1_1 = fma(a_1, b_1, acc_1_1);
      acc_1_2 = fma(a_1, b_2, acc_1_2);
      acc_1_3 = fma(a_1, b_3, acc_1_3);
    }
    {
      int k = kbase + 1;
      float a_0 = in_buf[16 + io + 0];
      float a_1 = in_buf[16 + io + 1];
      float b_0 = filts_buf[32 + fo + 0];
      float b_1 = filts_buf[32 + fo + 1];
      float b_2 = filts_buf[32 + fo + 2];
      float b_3 = filts_buf[32 + fo + 3];
      acc_0_0 = fma(a_0, b_0, acc_0_0);
      acc_0_1 = fma(a_0, b_1, acc_0_1);
      acc_0_2 = fma(a_0, b_2, acc_0_2);
      acc_0_3 = fma(a_0, b_3, acc_0_3);
      acc_1_0 = fma(a_1, b_0, acc_1_0);
      acc_1_1 = fma(a_1, b_1, acc_1_1);
      acc_1_2 = fma(a_1, b_2, acc_1_2);
      acc_1_3 = fma(a_1, b_3, acc_1_3);
    }
    {
      int k = kbase + 2;
      float a_0 = in_buf[32 + io + 0];
      float a_1 = in_buf[32 + io + 1];
      float b_0 = filts_buf[64 + fo + 0];
      float b_1 = filts_buf[64 + fo + 1];
      float b_2 = filts_buf[64 + fo + 2];
      float b_3 = filts_buf[64 + fo + 3];
      acc_0_0 = fma(a_0, b_0, acc_0_0);
      acc_0_1 = fma(a_0, b_1, acc_0_1);
      acc_0_2 = fma(a_0, b_2, acc_0_2);
      acc_0_3 = fma(a_0, b_3, acc_0_3);
      acc_1_0 = fma(a_1, b_0, acc_1_0);
      acc_1_1 = fma(a_1, b_1, acc_1_1);
      acc_1_2 = fma(a_1, b_2, acc_1_2);
      acc_1_3 = fma(a_1, b_3, acc_1_3);
    }
    {
      int k = kbase + 3;
      float a_0 = in_buf[48 + io + 0];
      float a_1 = in_buf[48 + io + 1];
      float b_0 = filts_buf[96 + fo + 0];
      float b_1 = filts_buf[96 + fo + 1];
      float b_2 = filts_buf[96 + fo + 2];
      float b_3 = filts_buf[96 + fo + 3];
      acc_0_0 = fma(a_0, b_0, acc_0_0);
      acc_0_1 = fma(a_0, b_1, acc_0_1);
      acc_0_2 = fma(a_0, b_2, acc_0_2);
      acc_0_3 = fma(a_0, b_3, acc_0_3);
      acc_1_0 = fma(a_1, b_0, acc_1_0);
      acc_1_1 = fma(a_1, b_1, acc_1_1);
      acc_1_2 = fma(a_1, b_2, acc_1_2);
      acc_1_3 = fma(a_1, b_3, acc_1_3);
    }
  }
  {
    int kbase = (meta->filts_in_chan_size*meta->filts_y_size*meta->filts_x_size) / 4 * 4;
    __syncthreads();
    int fsrc = kbase*meta->filts_x_stride + gn*32;
    filts_buf[0+thread_id] = filts[fsrc+thread_id];
    if(thread_id<32){{ int mc_l = (gm*16 + (thread_id)%16 < meta->out_img_size*meta->out_y_size*meta->out_x_size) ? gm*16 + (thread_id)%16 : meta->out_img_size*meta->out_y_size*meta->out_x_size - 1; int img_l = mc_l / (meta->out_y_size*meta->out_x_size); int py_l = (mc_l / meta->out_x_size) % meta->out_y_size; int px_l = mc_l % meta->out_x_size; int ib_l = img_l*meta->in_img_stride + py_l*1*meta->in_y_stride + px_l*1*meta->in_x_stride; int lko = (kbase + (thread_id)/16)*meta->in_chan_stride; in_buf[0+thread_id] = in[ib_l + lko]; }}
    __syncthreads();
    {
      int k = kbase + 0;
      float a_0 = in_buf[0 + io + 0];
      float a_1 = in_buf[0 + io + 1];
      float b_0 = filts_buf[0 + fo + 0];
      float b_1 = filts_buf[0 + fo + 1];
      float b_2 = filts_buf[0 + fo + 2];
      float b_3 = filts_buf[0 + fo + 3];
      acc_0_0 = fma(a_0, b_0, acc_0_0);
      acc_0_1 = fma(a_0, b_1, acc_0_1);
      acc_0_2 = fma(a_0, b_2, acc_0_2);
      acc_0_3 = fma(a_0, b_3, acc_0_3);
      acc_1_0 = fma(a_1, b_0, acc_1_0);
      acc_1_1 = fma(a_1, b_1, acc_1_1);
      acc_1_2 = fma(a_1, b_2, acc_1_2);
      acc_1_3 = fma(a_1, b_3, acc_1_3);
    }
    {
      int k = kbase + 1;
      float a_0 = in_buf[16 + io + 0];
      float a_1 = in_buf[16 + io + 1];
      float b_0 = filts_buf[32 + fo + 0];
      float b_1 = filts_buf[32 + fo + 1];
      float b_2 = filts_buf[32 + fo + 2];
      float b_3 = filts_buf[32 + fo + 3];
      acc_0_0 = fma(a_0, b_0, acc_0_0);
      acc_0_1 = fma(a_0, b_1, acc_0_1);
      acc_0_2 = fma(a_0, b_2, acc_0_2);
      acc_0_3 = fma(a_0, b_3, acc_0_3);
      acc_1_0 = fma(a_1, b_0, acc_1_0);
      acc_1_1 = fma(a_1, b_1, acc_1_1);
      acc_1_2 = fma(a_1, b_2, acc_1_2);
      acc_1_3 = fma(a_1, b_3, acc_1_3);
    }
  }
  float bias_0 = biases[(n0 + 0)*meta->biases_out_chan_stride];
  float bias_1 = biases[(n0 + 1)*meta->biases_out_chan_stride];
  float bias_2 = biases[(n0 + 2)*meta->biases_out_chan_stride];
  float bias_3 = biases[(n0 + 3)*meta->biases_out_chan_stride];
  if (m0 + 0 < meta->out_img_size*meta->out_y_size*meta->out_x_size) { float v_0_0 = acc_0_0 + bias_0; out[ob_0 + (n0 + 0)*meta->out_chan_stride] = ((v_0_0 > 0.0f) ? v_0_0 : 0.0f); }
  if (m0 + 0 < meta->out_img_size*meta->out_y_size*meta->out_x_size) { float v_0_1 = acc_0_1 + bias_1; out[ob_0 + (n0 + 1)*meta->out_chan_stride] = ((v_0_1 > 0.0f) ? v_0_1 : 0.0f); }
  if (m0 + 0 < meta->out_img_size*meta->out_y_size*meta->out_x_size) { float v_0_2 = acc_0_2 + bias_2; out[ob_0 + (n0 + 2)*meta->out_chan_stride] = ((v_0_2 > 0.0f) ? v_0_2 : 0.0f); }
  if (m0 + 0 < meta->out_img_size*meta->out_y_size*meta->out_x_size) { float v_0_3 = acc_0_3 + bias_3; out[ob_0 + (n0 + 3)*meta->out_chan_stride] = ((v_0_3 > 0.0f) ? v_0_3 : 0.0f); }
  if (m0 + 1 < meta->out_img_size*meta->out_y_size*meta->out_x_size) { float v_1_0 = acc_1_0 + bias_0; out[ob_1 + (n0 + 0)*meta->out_chan_stride] = ((v_1_0 > 0.0f) ? v_1_0 : 0.0f); }
  if (m0 + 1 < meta->out_img_size*meta->out_y_size*meta->out_x_size) { float v_1_1 = acc_1_1 + bias_1; out[ob_1 + (n0 + 1)*meta->out_chan_stride] = ((v_1_1 > 0.0f) ? v_1_1 : 0.0f); }
  if (m0 + 1 < meta->out_img_size*meta->out_y_size*meta->out_x_size) { float v_1_2 = acc_1_2 + bias_2; out[ob_1 + (n0 + 2)*meta->out_chan_stride] = ((v_1_2 > 0.0f) ? v_1_2 : 0.0f); }
  if (m0 + 1 < meta->out_img_size*meta->out_y_size*meta->out_x_size) { float v_1_3 = acc_1_3 + bias_3; out[ob_1 + (n0 + 3)*meta->out_chan_stride] = ((v_1_3 > 0.0f) ? v_1_3 : 0.0f); }
}
