__kernel void conv_fc(__global float const * in, __global float4 const * filts, __global float const * biases, __global float * out) {
  int thread_id = get_local_id(0);
  int gm = get_group_id(0) / 2;
  int gn = get_group_id(0) % 2;
  int tm = thread_id / 8;
  int tn = thread_id % 8;
  int m0 = gm*8 + tm*1;
  int n0 = gn*32 + tn*4;
  int nv0 = gn*8 + tn*1;
  int mc_0 = (m0 + 0 < 4*1*1) ? m0 + 0 : 4*1*1 - 1;
  int ib_0 = mc_0*288;
  int ob_0 = mc_0*64;
  float acc_0_0 = 0.0f;
  float acc_0_1 = 0.0f;
  float acc_0_2 = 0.0f;
  float acc_0_3 = 0.0f;
  for (int kc = 0; kc < (8*6*6) / 4; ++kc) {
    int kbase = kc*4;
    {
      int k = kbase + 0;
      int ko = k;
      float a_0 = in[ib_0 + ko];
      float4 b_0 = filts[k*(64/4) + nv0 + 0];
      acc_0_0 = fma(a_0, b_0.s0, acc_0_0);
      acc_0_1 = fma(a_0, b_0.s1, acc_0_1);
      acc_0_2 = fma(a_0, b_0.s2, acc_0_2);
      acc_0_3 = fma(a_0, b_0.s3, acc_0_3);
    }
    {
      int k = kbase + 1;
      int ko = k;
      float a_0 = in[ib_0 + ko];
      float4 b_0 = filts[k*(64/4) + nv0 + 0];
      acc_0_0 = fma(a_0, b_0.s0, acc_0_0);
      acc_0_1 = fma(a_0, b_0.s1, acc_0_1);
      acc_0_2 = fma(a_0, b_0.s2, acc_0_2);
      acc_0_3 = fma(a_0, b_0.s3, acc_0_3);
    }
    {
      int k = kbase + 2;
      int ko = k;
      float a_0 = in[ib_0 + ko];
      float4 b_0 = filts[k*(64/4) + nv0 + 0];
      acc_0_0 = fma(a_0, b_0.s0, acc_0_0);
      acc_0_1 = fma(a_0, b_0.s1, acc_0_1);
      acc_0_2 = fma(a_0, b_0.s2, acc_0_2);
      acc_0_3 = fma(a_0, b_0.s3, acc_0_3);
    }
    {
      int k = kbase + 3;
      int ko = k;
      float a_0 = in[ib_0 + ko];
      float4 b_0 = filts[k*(64/4) + nv0 + 0];
      acc_0_0 = fma(a_0, b_0.s0, acc_0_0);
      acc_0_1 = fma(a_0, b_0.s1, acc_0_1);
      acc_0_2 = fma(a_0, b_0.s2, acc_0_2);
      acc_0_3 = fma(a_0, b_0.s3, acc_0_3);
    }
  }
  float bias_0 = biases[(n0 + 0)*1];
  float bias_1 = biases[(n0 + 1)*1];
  float bias_2 = biases[(n0 + 2)*1];
  float bias_3 = biases[(n0 + 3)*1];
  if (m0 + 0 < 4*1*1) { float v_0_0 = acc_0_0 + bias_0; out[ob_0 + (n0 + 0)*1] = v_0_0; }
  if (m0 + 0 < 4*1*1) { float v_0_1 = acc_0_1 + bias_1; out[ob_0 + (n0 + 1)*1] = v_0_1; }
  if (m0 + 0 < 4*1*1) { float v_0_2 = acc_0_2 + bias_2; out[ob_0 + (n0 + 2)*1] = v_0_2; }
  if (m0 + 0 < 4*1*1) { float v_0_3 = acc_0_3 + bias_3; out[ob_0 + (n0 + 3)*1] = v_0_3; }
}
